"""litforge: metadata-driven captioning, shard packing, locked-image text
tuning and zero-shot evaluation for label-only image datasets, at desk scale."""

__version__ = "0.1.0"
