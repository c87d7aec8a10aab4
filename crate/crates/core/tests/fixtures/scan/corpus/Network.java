class Network {
    int recvWindowBytes = 16384;
    float backoffJitter = 0.25f;

    int compatWindow() {
        int legacy = 2048;
        return legacy;
    }
}
