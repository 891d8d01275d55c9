"""restfuzz: a stateful REST API fuzzer.

Compiles Swagger 2.0 documents into dependency-aware request grammars,
searches the space of request sequences with pluggable strategies, executes
them over raw HTTP/1.1, and buckets 5xx responses by their shortest failing
suffix.
"""

__version__ = "0.1.0"
