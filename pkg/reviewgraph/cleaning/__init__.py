from .filter import kcore_filter

__all__ = ["kcore_filter"]
