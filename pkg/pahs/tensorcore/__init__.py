"""Numeric kernels, the differentiation tape and the PT4 tensor format"""
