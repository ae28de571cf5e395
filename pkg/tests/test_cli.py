import json

import pytest

from locfewshot.cli import main


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--bogus", "1"])
    assert exc.value.code == 2


def test_gen_synth_then_stats(tmp_path, capsys):
    out = tmp_path / "synth"
    assert main(["gen-synth", "--classes", "12", "--scenes-per-class", "1", "--out", str(out)]) == 0
    assert (out / "manifest.json").exists()
    assert len(list((out / "images").glob("*.png"))) == 12
    capsys.readouterr()
    assert main(["stats", "--manifest", str(out / "manifest.json")]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["Classes"] == 12
    assert set(stats) == {"Samples", "Classes", "Imgs/Class", "Classes/Img", "Mean Area/Sample"}


def test_stage_chain_and_eval(tmp_path, capsys):
    out = tmp_path / "synth"
    main(["gen-synth", "--classes", "20", "--scenes-per-class", "12", "--out", str(out)])
    cfg = tmp_path / "run.ini"
    cfg.write_text(
        "[run]\n"
        f"manifest = {out / 'manifest.json'}\n"
        "ways = 3\nshots = 2\nqueries_per_episode = 3\ntrain_queries_per_episode = 3\n"
        "episodes_per_epoch = 2\nval_episodes = 2\npretrain_epochs = 1\npretrain_steps_per_epoch = 2\n"
        "pretrain_batch = 4\nfinetune_epochs = 1\nrpn_shots = 2\nrpn_queries = 1\n"
        "rpn_widths = 8, 16, 16\ncls_widths = 8, 16\nrpn_image_size = 32\ncls_image_size = 32\n"
    )
    metrics = tmp_path / "metrics.jsonl"
    rpn, cls = tmp_path / "rpn.npz", tmp_path / "cls.npz"
    base = ["--config", str(cfg), "--epochs", "1", "--metrics", str(metrics)]
    assert main(["train-rpn", *base, "--out", str(rpn)]) == 0
    assert main(["train-fewshot", *base, "--mode", "oracle", "--out", str(cls)]) == 0
    assert main(["finetune", *base, "--rpn-checkpoint", str(rpn), "--cls-checkpoint", str(cls),
                 "--out", str(tmp_path / "ft.npz")]) == 0
    capsys.readouterr()
    assert main(["eval", "--config", str(cfg), "--mode", "propnet", "--episodes", "4", "--seed", "7",
                 "--cls-checkpoint", str(tmp_path / "ft.npz"), "--rpn-checkpoint", str(rpn)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["episodes"] == 4 and report["total"] == 12 and report["per_seed"] == {"7": report["accuracy"]}
    records = [json.loads(line) for line in metrics.read_text().splitlines()]
    assert {r["stage"] for r in records} >= {"train-rpn", "train-fewshot", "finetune"}
    assert all({"epoch", "split", "seed"} <= set(r) for r in records if "epoch" in r)


def test_missing_checkpoint_is_an_error(tmp_path, capsys):
    out = tmp_path / "synth"
    main(["gen-synth", "--classes", "20", "--scenes-per-class", "3", "--out", str(out)])
    code = main(["eval", "--manifest", str(out / "manifest.json"), "--mode", "oracle", "--ways", "2"])
    assert code == 1
    assert "cls_checkpoint" in capsys.readouterr().err
