"""SVG figures and table serialization."""
