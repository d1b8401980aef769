namespace dbl {}
