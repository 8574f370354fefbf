"""Object-level SLAM backend: association, parameterization, topological matching, exploration."""

__version__ = "0.1.0"
