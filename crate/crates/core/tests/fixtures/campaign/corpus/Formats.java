class Formats {
    PixelFormat thumbFormat = PixelFormat.RGB_565;
    PixelFormat previewFormat = PixelFormat.ARGB_8888;
    Compression wireCodec = Compression.GZIP;
    Compression diskCodec = Compression.LZ4;
    SyncMode syncMode = SyncMode.PERIODIC;
}
