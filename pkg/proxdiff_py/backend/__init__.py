"""
proxdiff backend

Configuration, run services, reports and the command-line front end that
tie training, sampling, experiments and verification together.
"""
