"""siamnet: part-based siamese CNN metric learning for person
re-identification, with matrix-form pairwise costs, CMC evaluation and
split protocols.
"""

from .backend import backend_name, set_backend

__version__ = "0.1.0"

__all__ = ["backend_name", "set_backend", "__version__"]
