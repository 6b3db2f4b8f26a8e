"""The quadratic assignment domain."""
