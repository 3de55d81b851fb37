"""
Utilitaires (opérations sur grilles, formats binaires et texte, configuration, journalisation).
"""
