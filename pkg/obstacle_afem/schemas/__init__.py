# Pydantic schemas for configuration and serialized artifacts
