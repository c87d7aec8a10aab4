package app;

class Net {
    int timeoutMs = 4000;
    double backoff = 1.5;

    int deadline(int attempt) {
        return timeoutMs * attempt;
    }
}
