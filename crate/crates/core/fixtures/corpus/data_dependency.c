void prefix_sum(double *a, const double *b, int n)
{
    int i;

    a[0] = b[0];
    for (i = 1; i < n; i++) {
        a[i] = a[i - 1] + b[i];
    }

    for (i = 0; i < n; i++) {
        a[i] = a[i] * 0.5;
    }
}
