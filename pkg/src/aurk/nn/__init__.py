"""Numpy layers, RoI pooling, loss, optimizer and the region-based detector."""
