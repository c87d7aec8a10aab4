class PathUtil {
    String tail(String name) {
        return name.substring(4);
    }

    String lower(String name) {
        return name.toLowerCase(Locale.ROOT);
    }
}
