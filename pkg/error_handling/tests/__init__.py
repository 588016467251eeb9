"""
Test suite for the Error Handling Framework
""" 