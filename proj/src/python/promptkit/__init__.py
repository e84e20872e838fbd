"""Python bindings for the promptkit C++ core."""

from ._promptkit import (
    align_loss,
    cross_verify,
    giou_loss,
    gradcheck,
    hungarian,
    kendall_tau,
    l1_box_loss,
    order_loss,
    sample_batches,
    select_queries,
    soft_tau,
)

__all__ = [
    "align_loss",
    "cross_verify",
    "giou_loss",
    "gradcheck",
    "hungarian",
    "kendall_tau",
    "l1_box_loss",
    "order_loss",
    "sample_batches",
    "select_queries",
    "soft_tau",
]
