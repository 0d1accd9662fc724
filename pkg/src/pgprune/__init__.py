"""Forward-only structural pruning with policy-gradient mask learning."""

__version__ = "0.1.0"
