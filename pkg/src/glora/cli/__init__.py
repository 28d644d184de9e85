"""Command-line front end (``glora run|sweep|bench|resume``)."""
