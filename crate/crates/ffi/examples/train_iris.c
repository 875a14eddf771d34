/* Trains one Iris network through the C API.
 *
 *   cargo build --release -p expabs-lm-ffi
 *   cc -I crates/ffi/include crates/ffi/examples/train_iris.c \
 *      -L target/release -lexpabs_lm_ffi -o train_iris
 *   LD_LIBRARY_PATH=target/release ./train_iris datasets/iris.data datasets/iris.toml
 */
#include <stdio.h>

#include "expabs_lm.h"

static int fail(const char *what)
{
    const char *msg = expabs_last_error_message();
    fprintf(stderr, "%s: %s\n", what, msg ? msg : "unknown error");
    return 1;
}

int main(int argc, char **argv)
{
    if (argc != 3) {
        fprintf(stderr, "usage: %s DATA SCHEMA\n", argv[0]);
        return 2;
    }
    ExpabsDataset *data = NULL;
    if (expabs_dataset_load(argv[1], argv[2], 0, &data) != EXPABS_STATUS_OK)
        return fail("load");

    size_t sizes[3] = {expabs_dataset_input_dim(data), 7, expabs_dataset_output_dim(data)};
    ExpabsNetwork *net = NULL;
    if (expabs_network_new(sizes, 3, 1, &net) != EXPABS_STATUS_OK)
        return fail("network");

    ExpabsTrainerConfig cfg = expabs_trainer_config_default();
    cfg.tau_init = 10.0;
    ExpabsTrainResult *res = NULL;
    if (expabs_train(net, data, &cfg, &res) != EXPABS_STATUS_OK)
        return fail("train");

    ExpabsMetrics m;
    expabs_result_test_metrics(res, &m);
    printf("iterations %zu  final tau %.4g  test recognition %.3f  test MSE %.4g\n",
           expabs_result_iterations(res), expabs_result_final_tau(res), m.rec_rate, m.mse);

    expabs_result_free(res);
    expabs_network_free(net);
    expabs_dataset_free(data);
    return 0;
}
