"""Test suite for grp-urn."""
