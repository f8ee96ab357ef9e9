#define N 512

void smooth(double u[N][N], double v[N][N])
{
    int i, j;

#pragma acc kernels copy(u[0:N][0:N])
    for (i = 1; i < N - 1; i++) {
        for (j = 1; j < N - 1; j++) {
            v[i][j] = 0.25 * (u[i - 1][j] + u[i + 1][j] + u[i][j - 1] + u[i][j + 1]);
        }
    }

    for (i = 0; i < N; i++) {
        v[i][0] = 0.0;
    }
}
