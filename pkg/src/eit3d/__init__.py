"""Three-dimensional EIT reconstruction with edge-preferring priors."""
