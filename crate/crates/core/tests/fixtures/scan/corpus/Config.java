class Config {
    int retries = 2;
    boolean debug = false;
    long attempts = 0L;

    void reset() {
        retries = 6;
        debug = true;
        attempts = 0L;
    }
}
