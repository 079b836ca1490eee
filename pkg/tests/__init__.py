# ABOUTME: Test package initialization for qlrnn
# ABOUTME: Contains unit and integration test suites
