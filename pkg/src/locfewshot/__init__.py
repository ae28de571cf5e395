"""Few-shot classification of objects in busy images with localization masks.

A region proposal network turns a few annotated support images into soft masks
on a query image; an early-fusion prototypical network classifies the query
using those masks as a fourth input channel.
"""
from .encoder import EmbeddingEncoder, FeatureMapEncoder
from .episodic import Episode, EpisodeConfig, sample_episode
from .lovasz import lovasz_loss
from .protonet import class_centroids, classify_query, nll_loss
from .rpn import RegionProposalNetwork, masked_average_pool, propose_region

__version__ = "0.1.0"

__all__ = [
    "EmbeddingEncoder",
    "Episode",
    "EpisodeConfig",
    "FeatureMapEncoder",
    "RegionProposalNetwork",
    "class_centroids",
    "classify_query",
    "lovasz_loss",
    "masked_average_pool",
    "nll_loss",
    "propose_region",
    "sample_episode",
]
