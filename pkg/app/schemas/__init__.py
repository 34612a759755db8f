# Schemas package initialization 