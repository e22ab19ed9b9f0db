"""
SQ phase lab - statistical-query lower bounds, detectors and phase diagrams
for structured normal mean and sparse PCA detection
"""
