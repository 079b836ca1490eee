# ABOUTME: Unit test package for qlrnn
# ABOUTME: Contains fast tests with no external dependencies
