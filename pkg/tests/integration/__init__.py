# ABOUTME: Integration test package for qlrnn
# ABOUTME: Contains tests that train models from the shipped configs
