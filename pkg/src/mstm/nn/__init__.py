"""Conv + LSTM next-frame model, optimizer and checkpoints."""
