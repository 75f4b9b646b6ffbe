"""A coordination language for distributed databases: parser, type checker,
and small-step execution engine."""

__version__ = "0.1.0"
