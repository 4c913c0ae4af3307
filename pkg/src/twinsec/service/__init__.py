"""Control plane: HTTP/WebSocket API and CLI over the platform."""
