"""
Test package for armaxlab.
Contains unit tests for the numerical modules, the experiment runner, the CLI and the HTTP API.
"""
