from .dataset import LoadedDataset, load_dataset, load_images
from .join import (REASONS, Exclusion, IdentityKeys, JoinedInstance, join, read_manifest, write_exclusions,
                   write_manifest)
from .synth import SynthConfig, make_instance, read_pgm, synth_generate, write_dataset, write_pgm
from .tables import SchemaError, SourceTables, Violation, read_tables, validate_schema, write_tables

__all__ = [
    "LoadedDataset", "load_dataset", "load_images", "REASONS", "Exclusion", "IdentityKeys", "JoinedInstance",
    "join", "read_manifest", "write_exclusions", "write_manifest", "SynthConfig", "make_instance", "read_pgm",
    "synth_generate", "write_dataset", "write_pgm", "SchemaError", "SourceTables", "Violation", "read_tables",
    "validate_schema", "write_tables",
]
