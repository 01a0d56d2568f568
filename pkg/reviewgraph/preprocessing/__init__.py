from .sampling import sample_negative, sample_negatives
from .split import split_per_user

__all__ = ["sample_negative", "sample_negatives", "split_per_user"]
