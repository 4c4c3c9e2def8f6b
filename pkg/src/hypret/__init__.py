"""Hierarchy-aware ontology retrieval over standard Euclidean vector indexes.

Trains radius-constrained hyperbolic entity embeddings on an ontology's is-a
DAG, indexes their origin log-mapped tangent vectors in a Euclidean ANN
structure, and answers heterogeneous queries with pooled candidates, exact
hyperbolic reranking, and a query-adaptive soft-mixing gate.
"""

__version__ = "0.1.0"
