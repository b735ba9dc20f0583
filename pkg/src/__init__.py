"""Inference-market arbitrage analyses over per-attempt logs."""
