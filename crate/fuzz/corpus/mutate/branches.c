int g(const char *s) { if (!s) return 0; while (*s) { s++; } return 1; }
