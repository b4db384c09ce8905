# package


