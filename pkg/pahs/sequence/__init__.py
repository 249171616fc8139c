"""Sequence drivers and frame directory I/O"""
