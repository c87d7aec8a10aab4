class Logging {
    boolean verbose = false;

    void mirror(Console console) {
        console.setEcho(true);
    }
}
