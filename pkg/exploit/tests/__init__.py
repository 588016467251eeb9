"""
Test suite for the exploit scanners
"""
