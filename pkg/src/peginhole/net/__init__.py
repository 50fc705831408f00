"""Small numpy autodiff, the two point-cloud networks, and their training loop."""
