"""Etapas del pipeline de estructura y segmentacion de mapas de ocupacion."""
