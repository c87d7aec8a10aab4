class Features {
    boolean prefetchEnabled = true;
    boolean compressUploads = false;
    boolean keepAliveEnabled = true;
    boolean verboseMetrics = false;
    boolean lazyThumbnails = true;
    boolean dedupeWrites = false;
    boolean pinCertificates = true;
    boolean batchAnalytics = true;
    boolean lowPowerSync = false;
    boolean shadowMode = false;
}
