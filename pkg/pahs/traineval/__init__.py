"""Training, metrics, synthetic data and the ablation harness"""
