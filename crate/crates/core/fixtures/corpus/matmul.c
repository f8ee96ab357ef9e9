/* 2048x2048 matrix multiply benchmark. */
#include <stdio.h>
#include <sys/time.h>

#define N 2048

static double A[N][N], B[N][N], C[N][N], D[N][N];
static double diag[N];

static double now(void)
{
    struct timeval tv;
    gettimeofday(&tv, NULL);
    return tv.tv_sec + tv.tv_usec * 1e-6;
}

int main(void)
{
    int i, j, k;
    double sum = 0.0;
    double start = now();

    for (i = 0; i < N; i++) {
        for (j = 0; j < N; j++) {
            A[i][j] = (double)(i + j) / N;
            B[i][j] = (double)(i - j) / N;
        }
    }

    for (i = 0; i < N; i++) {
        for (j = 0; j < N; j++) {
            C[i][j] = 0.0;
        }
    }

    for (i = 0; i < N; i++) {
        for (j = 0; j < N; j++) {
            for (k = 0; k < N; k++) {
                C[i][j] += A[i][k] * B[k][j];
            }
        }
    }

    for (i = 0; i < N; i++) {
        for (j = 0; j < N; j++) {
            D[i][j] = C[i][j];
        }
    }

    for (i = 0; i < N; i++) {
        for (j = 0; j < N; j++) {
            sum += D[i][j];
        }
    }

    for (i = 0; i < N; i++)
        diag[i] = D[i][i] * 0.5;

    printf("checksum: %f diag: %f\n", sum, diag[N / 2]);
    printf("elapsed: %.3f s\n", now() - start);
    return 0;
}
