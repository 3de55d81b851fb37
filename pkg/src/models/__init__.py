"""
Modèles de données (grilles, embeddings, configurations, rapports).
"""
