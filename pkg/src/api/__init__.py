"""FastAPI read service over an ingested attempt dataset."""
