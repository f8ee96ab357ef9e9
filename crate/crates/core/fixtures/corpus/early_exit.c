int find_first(const int *a, int n, int key)
{
    int i, pos = -1;
    int hits = 0;

    for (i = 0; i < n; i++) {
        hits += a[i] == key;
    }

    for (i = 0; i < n; i++) {
        if (a[i] == key) {
            pos = i;
            break;
        }
    }

    return hits > 0 ? pos : -1;
}
