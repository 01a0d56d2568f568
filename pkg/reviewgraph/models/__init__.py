from .alignment import ItcHead, itc_loss, itc_objective, project, train_itc
from .compressor import AutoEncoder, build_item_init, compress, train_ae
from .epim import InitMode, ModelState, init_mode, propagate, score, train
from .raum import build_cross_relation, init_users, item_review_means

__all__ = [
    "AutoEncoder",
    "InitMode",
    "ItcHead",
    "ModelState",
    "build_cross_relation",
    "build_item_init",
    "compress",
    "init_mode",
    "init_users",
    "item_review_means",
    "itc_loss",
    "itc_objective",
    "project",
    "propagate",
    "score",
    "train",
    "train_ae",
    "train_itc",
]
