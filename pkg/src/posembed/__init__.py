"""
Constructions et mesures des embeddings de position.
"""
