from .pabulib import (
    DatasetEntry,
    PabulibError,
    parse_pabulib,
    parse_pabulib_file,
    serialize_pabulib,
)
from .corpus import (
    Role,
    SplitSpec,
    assign_split,
    content_hash,
    default_splits,
    filter_dataset,
    filter_report,
    rejection_reasons,
    GroupCache,
)
from .synthetic import SynthConfig, generate_synthetic

__all__ = [
    "DatasetEntry",
    "PabulibError",
    "parse_pabulib",
    "parse_pabulib_file",
    "serialize_pabulib",
    "Role",
    "SplitSpec",
    "assign_split",
    "content_hash",
    "default_splits",
    "filter_dataset",
    "filter_report",
    "rejection_reasons",
    "GroupCache",
    "SynthConfig",
    "generate_synthetic",
]
