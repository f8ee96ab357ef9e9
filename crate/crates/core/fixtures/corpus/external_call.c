#include <math.h>

extern double extern_fn(double x);

void transform(double *a, const double *b, int n)
{
    int i;

    for (i = 0; i < n; i++) {
        a[i] = sqrt(b[i]) * 2.0;
    }

    for (i = 0; i < n; i++) {
        a[i] = extern_fn(a[i]);
    }

    for (i = 0; i < n; i++) {
        a[i] = a[i] + b[i];
    }
}
