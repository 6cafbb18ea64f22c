/* Sample-and-hold of a filtered input. */
float hold_in;
float hold_out;

void HOLD_step(void)
{
  hold_out = hold_in;
}
