"""AC-BLSTM text classification with a small numpy autodiff engine."""
