# Database package initialization 