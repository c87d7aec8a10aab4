class ImageCache {
    int thumbWidth = 320;
    int thumbHeight = 240;
    PixelFormat decodeFormat = PixelFormat.ARGB_8888;
}
