// harness library
